fn main() {
    std::process::exit(fipoly::cli::main_with_args(std::env::args_os()));
}
