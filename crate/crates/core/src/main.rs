fn main() {
    std::process::exit(structint::cli::main_with_args(std::env::args_os()));
}
