//! Optional config file for encoder settings, merged under explicit flags.
//!
//! Two formats: a JSON object, or plain `key = value` lines with `#`
//! comments. Recognized keys: layers, variant, heads, channels, tau,
//! posenc, h, r. Values given on the command line win over the file.

use serde::Deserialize;

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub layers: Option<usize>,
    pub variant: Option<String>,
    pub heads: Option<usize>,
    pub channels: Option<usize>,
    pub tau: Option<usize>,
    pub posenc: Option<String>,
    pub h: Option<usize>,
    pub r: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &std::path::Path) -> Result<FileConfig, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        if text.trim_start().starts_with('{') {
            serde_json::from_str(&text).map_err(|e| format!("bad config JSON: {e}"))
        } else {
            Self::parse_kv(&text)
        }
    }

    fn parse_kv(text: &str) -> Result<FileConfig, String> {
        let mut cfg = FileConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("config line {}: expected key = value", lineno + 1))?;
            let key = key.trim();
            let value = value.trim();
            let parse_usize = |v: &str| {
                v.parse::<usize>()
                    .map_err(|_| format!("config line {}: bad number '{v}'", lineno + 1))
            };
            match key {
                "layers" => cfg.layers = Some(parse_usize(value)?),
                "heads" => cfg.heads = Some(parse_usize(value)?),
                "channels" => cfg.channels = Some(parse_usize(value)?),
                "tau" => cfg.tau = Some(parse_usize(value)?),
                "h" => cfg.h = Some(parse_usize(value)?),
                "r" => cfg.r = Some(parse_usize(value)?),
                "variant" => cfg.variant = Some(value.to_string()),
                "posenc" => cfg.posenc = Some(value.to_string()),
                other => return Err(format!("config line {}: unknown key '{other}'", lineno + 1)),
            }
        }
        Ok(cfg)
    }
}

/// Flag value if given, else config value, else the default.
pub fn resolve<T: Clone>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}
