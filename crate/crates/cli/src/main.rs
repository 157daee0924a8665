fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("AGENTGUARD_LOG", "warn")).init();
    std::process::exit(agentguard_cli::main_with(std::env::args()));
}
