fn main() {
    std::process::exit(blowup_lab::cli::run(std::env::args_os()));
}
