use std::fs;
use std::io::{Cursor, Read};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

const TU_BASE: &str = "https://www.chrsmrrs.com/graphkerneldatasets";

/// Unpacks a TU zip archive into `data_dir/name`, dropping the archive's top folder.
pub fn unpack(bytes: Vec<u8>, name: &str, data_dir: &Path) -> Result<PathBuf> {
    let mut archive = zip::ZipArchive::new(Cursor::new(bytes)).context("opening zip archive")?;
    let target = data_dir.join(name);
    fs::create_dir_all(&target).with_context(|| format!("creating {}", target.display()))?;
    let mut written = 0;
    for i in 0..archive.len() {
        let mut entry = archive.by_index(i)?;
        if entry.is_dir() {
            continue;
        }
        let Some(path) = entry.enclosed_name() else {
            bail!(
                "archive entry {} escapes the target directory",
                entry.name()
            );
        };
        let Some(file_name) = path.file_name() else {
            continue;
        };
        let mut buf = Vec::new();
        entry.read_to_end(&mut buf)?;
        let dest = target.join(file_name);
        fs::write(&dest, buf).with_context(|| format!("writing {}", dest.display()))?;
        written += 1;
    }
    if written == 0 {
        bail!("archive for {name} holds no files");
    }
    Ok(target)
}

pub fn fetch(
    name: &str,
    from: Option<&Path>,
    url: Option<&str>,
    data_dir: &Path,
) -> Result<PathBuf> {
    let bytes = match from {
        Some(path) => fs::read(path).with_context(|| format!("reading {}", path.display()))?,
        None => {
            let url = url
                .map(str::to_owned)
                .unwrap_or_else(|| format!("{TU_BASE}/{name}.zip"));
            log::info!("downloading {url}");
            let response = ureq::get(&url)
                .call()
                .with_context(|| format!("downloading {url}"))?;
            let mut buf = Vec::new();
            response.into_reader().read_to_end(&mut buf)?;
            buf
        }
    };
    unpack(bytes, name, data_dir)
}
