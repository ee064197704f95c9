fn main() {
    std::process::exit(invreg::cli::run_from(std::env::args_os()));
}
