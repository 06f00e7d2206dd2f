fn main() {
    std::process::exit(gkp_repeater::cli::run(std::env::args_os()));
}
