pub mod mock_http;
pub mod oracles;
