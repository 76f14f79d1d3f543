fn main() {
    std::process::exit(promptcodec::cli::main_with_args(std::env::args_os()));
}
