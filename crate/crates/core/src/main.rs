fn main() {
    std::process::exit(fadeout::cli::run(std::env::args_os()));
}
