fn main() {
    std::process::exit(platoon_game::cli::run(std::env::args_os()));
}
