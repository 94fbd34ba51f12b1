fn main() {
    std::process::exit(vesselnav::cli::run(std::env::args_os()));
}
