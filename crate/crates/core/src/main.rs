fn main() {
    std::process::exit(tbrw::cli::run(std::env::args_os()));
}
