fn main() {
    std::process::exit(cylscatter::cli::main_with_args(std::env::args_os()));
}
