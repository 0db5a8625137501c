fn main() {
    std::process::exit(qalign::cli::run(std::env::args_os()));
}
