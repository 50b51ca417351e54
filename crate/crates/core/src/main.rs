fn main() {
    std::process::exit(wisdomdyn::cli::run(std::env::args_os()));
}
