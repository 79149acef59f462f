fn main() {
    std::process::exit(huapa::cli::run(std::env::args_os()));
}
