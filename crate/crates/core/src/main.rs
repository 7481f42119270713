fn main() {
    std::process::exit(mqmix::cli::run(std::env::args_os()));
}
