fn main() {
    std::process::exit(deepclean::cli::run(std::env::args_os()));
}
