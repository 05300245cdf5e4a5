fn main() {
    std::process::exit(qstat::cli::main_with_args(std::env::args_os()));
}
