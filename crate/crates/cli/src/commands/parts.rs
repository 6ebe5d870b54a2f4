use partscope_core::kb::{load_kb, IMAGENET_VISA_KB, PASCAL_PART_KB};

use crate::{CliError, CliResult};

pub fn run(concept: &str, kb_arg: &str) -> CliResult {
    let doc = match kb_arg {
        "pascal" => PASCAL_PART_KB.to_string(),
        "imagenet" => IMAGENET_VISA_KB.to_string(),
        path => std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("cannot read kb `{path}`: {e}")))?,
    };
    let kb = load_kb(&doc).map_err(CliError::input)?;
    let parts = kb
        .resolve_parts(&concept.to_lowercase())
        .map_err(CliError::input)?;
    for p in parts {
        println!("{p}");
    }
    Ok(())
}
