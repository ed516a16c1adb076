fn main() {
    std::process::exit(dfindex_cli::run(std::env::args_os()));
}
