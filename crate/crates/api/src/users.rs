use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::{OnceLock, RwLock};

use argon2::password_hash::rand_core::OsRng;
use argon2::password_hash::{PasswordHash, PasswordHasher, PasswordVerifier, SaltString};
use argon2::Argon2;
use lify_core::{Principal, Role};
use serde::{Deserialize, Serialize};

use crate::error::ApiError;
use crate::store::JsonFile;

pub const MIN_PASSWORD_CHARS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserAccount {
    pub user_id: String,
    /// Stored lowercased; uniqueness is case-insensitive.
    pub email: String,
    pub display_name: String,
    pub role: Role,
    pub password_hash: String,
    #[serde(default)]
    pub patient_links: BTreeSet<String>,
    /// Receive chat notifications for followed patients.
    #[serde(default = "yes")]
    pub notify_alerts: bool,
    pub created_ts_ms: i64,
}

fn yes() -> bool {
    true
}

impl UserAccount {
    pub fn principal(&self) -> Principal {
        Principal { user_id: self.user_id.clone(), display_name: self.display_name.clone(), role: self.role }
    }

    /// Staff and admins see every patient; family only linked ones.
    pub fn can_read_patient(&self, patient_id: &str) -> bool {
        self.role.is_caregiver() || self.patient_links.contains(patient_id)
    }
}

/// The account as returned by the API: no password hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicUser {
    pub user_id: String,
    pub email: String,
    pub display_name: String,
    pub role: Role,
    pub patient_links: BTreeSet<String>,
    pub notify_alerts: bool,
}

impl From<&UserAccount> for PublicUser {
    fn from(u: &UserAccount) -> Self {
        Self {
            user_id: u.user_id.clone(),
            email: u.email.clone(),
            display_name: u.display_name.clone(),
            role: u.role,
            patient_links: u.patient_links.clone(),
            notify_alerts: u.notify_alerts,
        }
    }
}

pub fn hash_password(password: &str) -> Result<String, ApiError> {
    let salt = SaltString::generate(&mut OsRng);
    Argon2::default()
        .hash_password(password.as_bytes(), &salt)
        .map(|h| h.to_string())
        .map_err(|e| ApiError::internal("password hashing", e))
}

pub fn verify_password(password: &str, hash: &str) -> bool {
    PasswordHash::new(hash).is_ok_and(|h| Argon2::default().verify_password(password.as_bytes(), &h).is_ok())
}

/// Burns the same work as a real verification so unknown emails and wrong
/// passwords take the same time.
pub fn verify_against_dummy(password: &str) {
    static DUMMY: OnceLock<String> = OnceLock::new();
    let hash = DUMMY.get_or_init(|| hash_password("dummy-password-for-timing").unwrap_or_default());
    let _ = verify_password(password, hash);
}

pub fn normalize_email(email: &str) -> Result<String, ApiError> {
    let e = email.trim().to_lowercase();
    let valid = e.len() <= 254
        && e.split_once('@').is_some_and(|(local, domain)| !local.is_empty() && !domain.is_empty())
        && !e.contains(char::is_whitespace);
    if valid {
        Ok(e)
    } else {
        Err(ApiError::validation(format!("{email:?} is not an email address")))
    }
}

pub struct UserStore {
    file: JsonFile,
    users: RwLock<BTreeMap<String, UserAccount>>,
}

impl UserStore {
    pub fn open(path: Option<PathBuf>) -> std::io::Result<Self> {
        let file = JsonFile::new(path);
        let list: Vec<UserAccount> = file.load()?;
        let users = list.into_iter().map(|u| (u.user_id.clone(), u)).collect();
        Ok(Self { file, users: RwLock::new(users) })
    }

    pub fn is_empty(&self) -> bool {
        self.users.read().unwrap().is_empty()
    }

    pub fn get(&self, user_id: &str) -> Option<UserAccount> {
        self.users.read().unwrap().get(user_id).cloned()
    }

    pub fn by_email(&self, email: &str) -> Option<UserAccount> {
        let email = email.trim().to_lowercase();
        self.users.read().unwrap().values().find(|u| u.email == email).cloned()
    }

    pub fn list(&self) -> Vec<UserAccount> {
        self.users.read().unwrap().values().cloned().collect()
    }

    /// Inserts a new account; `check` runs under the write lock so the
    /// bootstrap rule and email uniqueness are decided atomically.
    pub fn insert_with(
        &self,
        account: UserAccount,
        check: impl FnOnce(&BTreeMap<String, UserAccount>) -> Result<(), ApiError>,
    ) -> Result<UserAccount, ApiError> {
        let mut users = self.users.write().unwrap();
        check(&users)?;
        if users.values().any(|u| u.email == account.email) {
            return Err(ApiError::conflict("email_taken", format!("{} is already registered", account.email)));
        }
        let mut next = users.clone();
        next.insert(account.user_id.clone(), account.clone());
        self.persist(&next)?;
        *users = next;
        Ok(account)
    }

    /// Applies `f` to one account atomically.
    pub fn update(&self, user_id: &str, f: impl FnOnce(&mut UserAccount) -> Result<(), ApiError>) -> Result<UserAccount, ApiError> {
        let mut users = self.users.write().unwrap();
        let mut next = users.clone();
        let user = next.get_mut(user_id).ok_or_else(|| ApiError::not_found(format_args!("user {user_id}")))?;
        f(user)?;
        let updated = user.clone();
        self.persist(&next)?;
        *users = next;
        Ok(updated)
    }

    fn persist(&self, users: &BTreeMap<String, UserAccount>) -> Result<(), ApiError> {
        let list: Vec<&UserAccount> = users.values().collect();
        self.file.save(&list).map_err(|e| ApiError::internal("user storage", e))
    }
}
