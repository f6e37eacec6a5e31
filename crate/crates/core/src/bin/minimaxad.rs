fn main() {
    std::process::exit(minimaxad::pipeline::cli::run(std::env::args_os()));
}
