fn main() {
    std::process::exit(kinwass::cli::run(std::env::args_os()));
}
