fn main() {
    std::process::exit(somnet::cli::run_from(std::env::args_os()));
}
