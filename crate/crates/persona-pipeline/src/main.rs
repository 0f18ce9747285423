fn main() {
    std::process::exit(persona_pipeline::stages::run());
}
