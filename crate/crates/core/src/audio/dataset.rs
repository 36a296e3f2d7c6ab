use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{load_wav, wav, AudioBuffer, AudioError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SongEntry {
    pub song_id: String,
    pub mixture: PathBuf,
    pub vocals: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub split: Split,
    pub entries: Vec<SongEntry>,
    /// Native rate of the stems; 0 for an empty split.
    pub sample_rate: u32,
}

fn song_error(song: &str, detail: impl Into<String>) -> AudioError {
    AudioError::Dataset {
        song: song.to_string(),
        detail: detail.into(),
    }
}

/// Frames and rate from the header only.
fn probe(song: &str, path: &Path) -> Result<(u32, u32), AudioError> {
    let r = wav::open(path).map_err(|e| song_error(song, format!("{}: {e}", path.display())))?;
    Ok((r.spec().sample_rate, r.duration()))
}

fn scan(dir: &Path, split: Split) -> Result<DatasetIndex, AudioError> {
    let mut songs: Vec<String> = fs::read_dir(dir)
        .map_err(|source| AudioError::Io {
            path: dir.to_path_buf(),
            source,
        })?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    songs.sort();
    let mut entries = Vec::with_capacity(songs.len());
    let mut rate = 0;
    for song in songs {
        let base = dir.join(&song);
        let mixture = base.join("mixture.wav");
        let vocals = base.join("vocals.wav");
        for (stem, p) in [("mixture.wav", &mixture), ("vocals.wav", &vocals)] {
            if !p.is_file() {
                return Err(song_error(&song, format!("missing {stem}")));
            }
        }
        let (mr, ml) = probe(&song, &mixture)?;
        let (vr, vl) = probe(&song, &vocals)?;
        if mr != vr {
            return Err(song_error(&song, format!("sample rates differ: mixture {mr} Hz, vocals {vr} Hz")));
        }
        if ml != vl {
            return Err(song_error(&song, format!("lengths differ: mixture {ml} frames, vocals {vl} frames")));
        }
        if rate != 0 && mr != rate {
            return Err(song_error(&song, format!("sample rate {mr} Hz differs from {rate} Hz")));
        }
        rate = mr;
        entries.push(SongEntry {
            song_id: song,
            mixture,
            vocals,
        });
    }
    Ok(DatasetIndex {
        split,
        entries,
        sample_rate: rate,
    })
}

/// Indexes `root/{train,test}/<song>/{mixture,vocals}.wav`. Songs are sorted
/// by name; the last `valid_songs` training songs form the validation split
/// (default: a quarter of them, rounded). A missing `test` directory yields
/// an empty test split.
pub fn index_dataset(
    root: impl AsRef<Path>,
    valid_songs: Option<usize>,
) -> Result<(DatasetIndex, DatasetIndex, DatasetIndex), AudioError> {
    let root = root.as_ref();
    let train_dir = root.join("train");
    if !train_dir.is_dir() {
        return Err(AudioError::NotFound(train_dir));
    }
    let mut train = scan(&train_dir, Split::Train)?;
    let test_dir = root.join("test");
    let test = if test_dir.is_dir() {
        scan(&test_dir, Split::Test)?
    } else {
        DatasetIndex {
            split: Split::Test,
            entries: Vec::new(),
            sample_rate: 0,
        }
    };
    let n = train.entries.len();
    let n_valid = valid_songs.unwrap_or((n as f64 * 0.25).round() as usize);
    if n_valid > n {
        return Err(AudioError::InvalidArgument(format!(
            "requested {n_valid} validation songs but only {n} training songs exist"
        )));
    }
    let valid = DatasetIndex {
        split: Split::Valid,
        entries: train.entries.split_off(n - n_valid),
        sample_rate: train.sample_rate,
    };
    Ok((train, valid, test))
}

/// Loads both stems of a song.
pub fn load_pair(entry: &SongEntry) -> Result<(AudioBuffer, AudioBuffer), AudioError> {
    let wrap = |e: AudioError| song_error(&entry.song_id, e.to_string());
    let mix = load_wav(&entry.mixture).map_err(wrap)?;
    let voc = load_wav(&entry.vocals).map_err(wrap)?;
    if mix.frames() != voc.frames() || mix.sample_rate != voc.sample_rate {
        return Err(song_error(&entry.song_id, "mixture and vocals differ in length or rate"));
    }
    Ok((mix, voc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{write_wav, SampleFormat};

    fn make_song(dir: &Path, split: &str, name: &str, len: usize, vocals: bool) {
        let d = dir.join(split).join(name);
        fs::create_dir_all(&d).unwrap();
        let b = AudioBuffer::mono(vec![0.1; len], 8000).unwrap();
        write_wav(&b, d.join("mixture.wav"), SampleFormat::Pcm16).unwrap();
        if vocals {
            write_wav(&b, d.join("vocals.wav"), SampleFormat::Pcm16).unwrap();
        }
    }

    #[test]
    fn proportional_split_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["d", "b", "a", "c"] {
            make_song(dir.path(), "train", name, 50, true);
        }
        make_song(dir.path(), "test", "t1", 50, true);
        let (tr, va, te) = index_dataset(dir.path(), Some(1)).unwrap();
        let ids = |i: &DatasetIndex| i.entries.iter().map(|e| e.song_id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&tr), ["a", "b", "c"]);
        assert_eq!(ids(&va), ["d"]);
        assert_eq!(ids(&te), ["t1"]);
        assert_eq!(tr.sample_rate, 8000);
        let (tr2, va2, _) = index_dataset(dir.path(), None).unwrap();
        assert_eq!((ids(&tr2), ids(&va2)), (ids(&tr), ids(&va)));
    }

    #[test]
    fn hundred_songs_split_75_25() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..100 {
            make_song(dir.path(), "train", &format!("s{i:03}"), 20, true);
        }
        let (tr, va, te) = index_dataset(dir.path(), Some(25)).unwrap();
        assert_eq!((tr.entries.len(), va.entries.len(), te.entries.len()), (75, 25, 0));
        let (tr, va, _) = index_dataset(dir.path(), None).unwrap();
        assert_eq!((tr.entries.len(), va.entries.len()), (75, 25));
    }

    #[test]
    fn missing_stem_names_song() {
        let dir = tempfile::tempdir().unwrap();
        make_song(dir.path(), "train", "ok", 20, true);
        make_song(dir.path(), "train", "broken", 20, false);
        let err = index_dataset(dir.path(), Some(0)).unwrap_err();
        assert!(matches!(&err, AudioError::Dataset { song, .. } if song == "broken"), "{err}");
        assert!(err.to_string().contains("vocals.wav"));
    }

    #[test]
    fn length_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        make_song(dir.path(), "train", "x", 20, true);
        let b = AudioBuffer::mono(vec![0.1; 21], 8000).unwrap();
        write_wav(&b, dir.path().join("train/x/vocals.wav"), SampleFormat::Pcm16).unwrap();
        let err = index_dataset(dir.path(), Some(0)).unwrap_err();
        assert!(err.to_string().contains("lengths differ"), "{err}");
        assert!(index_dataset(dir.path().join("nothing"), None).is_err());
    }
}
