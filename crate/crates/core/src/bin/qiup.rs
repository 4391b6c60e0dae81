fn main() {
    std::process::exit(qiup_core::cli::run(std::env::args_os()));
}
