fn main() {
    std::process::exit(lightfdg::cli::run(std::env::args_os()));
}
