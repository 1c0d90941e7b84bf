fn main() {
    std::process::exit(emodistill::cli::run(std::env::args_os()));
}
