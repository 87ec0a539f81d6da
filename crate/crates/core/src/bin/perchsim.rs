fn main() {
    std::process::exit(perchdrill::cli::main_with_args(std::env::args_os()));
}
