fn main() {
    std::process::exit(loadclust_cli::run(std::env::args_os()));
}
