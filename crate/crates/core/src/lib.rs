pub mod crypto;
pub mod daemon;
pub mod names;
pub mod validator;
pub mod wire;
pub mod server;
pub mod client;
pub mod bench;
pub mod cli;
