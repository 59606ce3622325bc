fn main() {
    std::process::exit(ici::cli::main_with_args(std::env::args_os()));
}
