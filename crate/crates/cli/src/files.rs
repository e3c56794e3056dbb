//! On-disk artifacts. Binary files are canonical encodings; the server
//! configuration is JSON because operators edit it.

use std::fs;
use std::path::{Path, PathBuf};

use incognito_core::codec::{canonical_decode, canonical_encode, Canonical, Decode, DecodeError, Encode, Reader, Writer};
use incognito_core::envelope::{EphemeralKeyPair, KeyPair, PublicKey};
use incognito_core::tags;
use incognito_core::token::Token;
use incognito_sim::scenario::{AclSpec, GrantSpec, ResourceSpec};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Role {
    Clearance,
    Server,
    Org,
    User,
}

impl Role {
    fn id(self) -> u8 {
        match self {
            Role::Clearance => 0,
            Role::Server => 1,
            Role::Org => 2,
            Role::User => 3,
        }
    }

    fn from_id(id: u8) -> Result<Self, DecodeError> {
        match id {
            0 => Ok(Role::Clearance),
            1 => Ok(Role::Server),
            2 => Ok(Role::Org),
            3 => Ok(Role::User),
            value => Err(DecodeError::BadDiscriminant { value, name: "Role" }),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Role::Clearance => "clearance",
            Role::Server => "server",
            Role::Org => "org",
            Role::User => "user",
        }
    }
}

/// Secret half. Users hold an ephemeral key, everyone else a long-term one.
#[derive(Debug, Clone)]
pub enum Secret {
    LongTerm(KeyPair),
    Ephemeral(EphemeralKeyPair),
}

#[derive(Debug, Clone)]
pub struct KeyFile {
    pub role: Role,
    pub name: String,
    pub id: Token,
    pub secret: Secret,
}

impl KeyFile {
    pub fn public_key(&self) -> PublicKey {
        match &self.secret {
            Secret::LongTerm(k) => k.public_key(),
            Secret::Ephemeral(k) => k.key_pair().public_key(),
        }
    }

    pub fn long_term(&self) -> Result<&KeyPair, CliError> {
        match &self.secret {
            Secret::LongTerm(k) => Ok(k),
            Secret::Ephemeral(_) => Err(CliError::invalid("Malformed", format!("{} holds a user key", self.name))),
        }
    }

    pub fn identity(&self) -> PublicIdentity {
        PublicIdentity {
            role: self.role,
            name: self.name.clone(),
            id: self.id.clone(),
            key: self.public_key(),
        }
    }
}

impl Encode for KeyFile {
    fn encode(&self, w: &mut Writer) {
        w.u8(tags::KEY_FILE);
        w.u8(self.role.id());
        w.str(&self.name);
        w.put(&self.id);
        match &self.secret {
            Secret::LongTerm(k) => {
                w.u8(0);
                w.put(k);
            }
            Secret::Ephemeral(k) => {
                w.u8(1);
                w.put(k);
            }
        }
    }
}

impl Decode for KeyFile {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.expect_tag(tags::KEY_FILE, "KeyFile")?;
        let role = Role::from_id(r.u8()?)?;
        let name = r.str()?;
        let id = r.get()?;
        let secret = match r.u8()? {
            0 => Secret::LongTerm(r.get()?),
            1 => Secret::Ephemeral(r.get()?),
            value => return Err(DecodeError::BadDiscriminant { value, name: "Secret" }),
        };
        Ok(Self { role, name, id, secret })
    }
}

impl Canonical for KeyFile {
    const TAG: u8 = tags::KEY_FILE;
    const NAME: &'static str = "KeyFile";
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublicIdentity {
    pub role: Role,
    pub name: String,
    pub id: Token,
    pub key: PublicKey,
}

impl Encode for PublicIdentity {
    fn encode(&self, w: &mut Writer) {
        w.u8(tags::PUBLIC_IDENTITY);
        w.u8(self.role.id());
        w.str(&self.name);
        w.put(&self.id);
        w.put(&self.key);
    }
}

impl Decode for PublicIdentity {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.expect_tag(tags::PUBLIC_IDENTITY, "PublicIdentity")?;
        Ok(Self {
            role: Role::from_id(r.u8()?)?,
            name: r.str()?,
            id: r.get()?,
            key: r.get()?,
        })
    }
}

impl Canonical for PublicIdentity {
    const TAG: u8 = tags::PUBLIC_IDENTITY;
    const NAME: &'static str = "PublicIdentity";
}

/// Grants file for `agree`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrantsFile {
    #[serde(default)]
    pub implications: Vec<(String, String)>,
    pub grants: Vec<GrantSpec>,
}

/// Entries file for `acl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AclFile {
    pub resources: Vec<ResourceSpec>,
    pub entries: Vec<AclSpec>,
}

/// Written by `acl`, read by `request`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    pub clearance: String,
    pub replay_window: u64,
    pub resources: Vec<ResourceSpec>,
}

pub struct State {
    pub dir: PathBuf,
}

impl State {
    pub fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    pub fn key_path(&self, name: &str) -> PathBuf {
        self.path(&format!("{name}.key"))
    }

    pub fn pub_path(&self, name: &str) -> PathBuf {
        self.path(&format!("{name}.pub"))
    }

    /// Key file of `name`; `missing` names the error when there is none.
    pub fn key(&self, name: &str, role: Role, missing: &str) -> Result<KeyFile, CliError> {
        let p = self.key_path(name);
        if !p.exists() {
            return Err(CliError::invalid(missing, format!("no {} key for {name:?}", role.name())));
        }
        let k: KeyFile = read_canonical(&p)?;
        if k.role != role {
            return Err(CliError::invalid(
                "Malformed",
                format!("{name:?} is a {} key, not a {} key", k.role.name(), role.name()),
            ));
        }
        Ok(k)
    }

    pub fn identity(&self, name: &str, role: Role, missing: &str) -> Result<PublicIdentity, CliError> {
        let p = self.pub_path(name);
        if !p.exists() {
            return Err(CliError::invalid(missing, format!("no {} identity for {name:?}", role.name())));
        }
        let k: PublicIdentity = read_canonical(&p)?;
        if k.role != role {
            return Err(CliError::invalid(
                "Malformed",
                format!("{name:?} is a {} identity, not a {} identity", k.role.name(), role.name()),
            ));
        }
        Ok(k)
    }

    /// Every public identity in the directory.
    pub fn identities(&self) -> Vec<PublicIdentity> {
        let Ok(rd) = fs::read_dir(&self.dir) else {
            return Vec::new();
        };
        let mut out: Vec<PublicIdentity> = rd
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "pub"))
            .filter_map(|p| read_canonical(&p).ok())
            .collect();
        out.sort_by(|a, b| a.name.cmp(&b.name));
        out
    }
}

pub fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn read_canonical<T: Canonical>(path: &Path) -> Result<T, CliError> {
    canonical_decode(&read(path)?).map_err(|e| CliError::invalid("Malformed", format!("{}: {e}", path.display())))
}

pub fn write_canonical<T: Canonical>(path: &Path, v: &T) -> Result<(), CliError> {
    write(path, &canonical_encode(v))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = read_text(path)?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        CliError::invalid(
            "Malformed",
            format!("{}: {} at {}", path.display(), e.inner(), e.path()),
        )
    })
}
