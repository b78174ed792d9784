fn main() {
    civitas::cli::init_logging();
    std::process::exit(civitas::cli::run(std::env::args_os()));
}
