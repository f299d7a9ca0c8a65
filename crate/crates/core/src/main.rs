fn main() {
    std::process::exit(bbvi::cli::main_with_args(std::env::args_os()));
}
