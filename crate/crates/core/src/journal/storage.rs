use std::fs::{File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

/// Byte sink behind the journal writer.
pub trait Storage: Send {
    fn append(&mut self, bytes: &[u8]) -> io::Result<()>;
    fn flush(&mut self) -> io::Result<()>;
    fn read_all(&self) -> io::Result<Vec<u8>>;
    /// Drops everything past `len` bytes.
    fn truncate(&mut self, len: u64) -> io::Result<()>;
}

pub struct FileStorage {
    path: PathBuf,
    file: io::BufWriter<File>,
}

impl FileStorage {
    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).read(true).open(&path)?;
        Ok(Self {
            path,
            file: io::BufWriter::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl Storage for FileStorage {
    fn append(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.file.write_all(bytes)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.file.flush()?;
        self.file.get_ref().sync_data()
    }

    fn read_all(&self) -> io::Result<Vec<u8>> {
        let mut buf = Vec::new();
        File::open(&self.path)?.read_to_end(&mut buf)?;
        Ok(buf)
    }

    fn truncate(&mut self, len: u64) -> io::Result<()> {
        self.file.flush()?;
        self.file.get_ref().set_len(len)
    }
}

/// In-memory storage. Clones share the same buffer, so a test can keep a
/// handle, drop the engine, and reopen from the same bytes.
#[derive(Clone, Default)]
pub struct MemoryStorage {
    buf: Arc<Mutex<Vec<u8>>>,
}

impl MemoryStorage {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Self {
            buf: Arc::new(Mutex::new(bytes)),
        }
    }

    pub fn bytes(&self) -> Vec<u8> {
        self.buf.lock().unwrap().clone()
    }

    pub fn len(&self) -> usize {
        self.buf.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Storage for MemoryStorage {
    fn append(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.buf.lock().unwrap().extend_from_slice(bytes);
        Ok(())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }

    fn read_all(&self) -> io::Result<Vec<u8>> {
        Ok(self.bytes())
    }

    fn truncate(&mut self, len: u64) -> io::Result<()> {
        self.buf.lock().unwrap().truncate(len as usize);
        Ok(())
    }
}

/// Wraps another storage and fails every write once a byte budget is spent,
/// the way a full disk does.
pub struct CapacityLimited<S> {
    inner: S,
    remaining: usize,
}

impl<S: Storage> CapacityLimited<S> {
    pub fn new(inner: S, capacity: usize) -> Self {
        Self {
            inner,
            remaining: capacity,
        }
    }
}

impl<S: Storage> Storage for CapacityLimited<S> {
    fn append(&mut self, bytes: &[u8]) -> io::Result<()> {
        if bytes.len() > self.remaining {
            return Err(io::Error::new(io::ErrorKind::StorageFull, "no space left on device"));
        }
        self.remaining -= bytes.len();
        self.inner.append(bytes)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }

    fn read_all(&self) -> io::Result<Vec<u8>> {
        self.inner.read_all()
    }

    fn truncate(&mut self, len: u64) -> io::Result<()> {
        self.inner.truncate(len)
    }
}
