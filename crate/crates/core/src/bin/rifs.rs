fn main() {
    std::process::exit(rifs::cli::main_with_args(std::env::args_os()));
}
