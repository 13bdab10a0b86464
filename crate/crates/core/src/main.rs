fn main() {
    std::process::exit(stam::cli::main_with_args(std::env::args_os()));
}
