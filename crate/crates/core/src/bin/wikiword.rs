fn main() {
    std::process::exit(wikiword::cli::run(std::env::args_os()));
}
