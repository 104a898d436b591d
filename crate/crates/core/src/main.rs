fn main() {
    std::process::exit(dfplace::cli::run(std::env::args_os()));
}
