fn main() {
    std::process::exit(aloha_bandit::experiment::cli::run(std::env::args_os()));
}
