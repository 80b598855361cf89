fn main() {
    std::process::exit(tada::cli::main_with_args(std::env::args_os()));
}
