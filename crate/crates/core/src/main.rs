fn main() {
    std::process::exit(acoustic_backdoor::cli::run(std::env::args_os()));
}
