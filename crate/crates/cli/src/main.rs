fn main() {
    std::process::exit(tgfuse_cli::run(std::env::args_os()));
}
