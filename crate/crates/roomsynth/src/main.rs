fn main() {
    std::process::exit(roomsynth::cli::run());
}
