fn main() {
    std::process::exit(taskmerge::cli::run(std::env::args_os()));
}
