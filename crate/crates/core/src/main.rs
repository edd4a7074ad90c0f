fn main() {
    std::process::exit(infmodel::cli::main_with_args(std::env::args_os()));
}
