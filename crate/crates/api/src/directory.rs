use std::sync::Arc;

use lify_notifier::{short_name, Recipient, RecipientDirectory};

use crate::patients::PatientStore;
use crate::users::UserStore;

/// Resolves alert recipients from the account and patient stores: every
/// caregiver plus family linked to the patient, minus anyone who opted out.
pub struct AccountDirectory {
    users: Arc<UserStore>,
    patients: Arc<PatientStore>,
}

impl AccountDirectory {
    pub fn new(users: Arc<UserStore>, patients: Arc<PatientStore>) -> Self {
        Self { users, patients }
    }
}

impl RecipientDirectory for AccountDirectory {
    fn patient_name(&self, patient_id: &str) -> Option<String> {
        self.patients.get(patient_id).map(|p| short_name(&p.name))
    }

    fn user_name(&self, user_id: &str) -> Option<String> {
        self.users.get(user_id).map(|u| u.display_name)
    }

    fn recipients(&self, patient_id: &str) -> Vec<Recipient> {
        self.users
            .list()
            .into_iter()
            .filter(|u| u.notify_alerts && u.can_read_patient(patient_id))
            .map(|u| Recipient { user_id: u.user_id })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patients::PatientProfile;
    use crate::users::UserAccount;
    use lify_core::Role;

    fn user(id: &str, role: Role, links: &[&str], notify: bool) -> UserAccount {
        UserAccount {
            user_id: id.into(),
            email: format!("{id}@example.org"),
            display_name: id.to_uppercase(),
            role,
            password_hash: String::new(),
            patient_links: links.iter().map(|s| s.to_string()).collect(),
            notify_alerts: notify,
            created_ts_ms: 0,
        }
    }

    #[test]
    fn caregivers_and_linked_family_who_opted_in() {
        let users = Arc::new(UserStore::open(None).unwrap());
        for u in [
            user("adm", Role::Admin, &[], true),
            user("nurse", Role::Staff, &[], true),
            user("quiet", Role::Staff, &[], false),
            user("son", Role::Family, &["p1"], true),
            user("other", Role::Family, &["p2"], true),
        ] {
            users.insert_with(u, |_| Ok(())).unwrap();
        }
        let patients = Arc::new(PatientStore::open(None).unwrap());
        patients
            .create(PatientProfile {
                patient_id: "p1".into(),
                name: "Ana María Pérez".into(),
                birth_date: "1940-01-01".into(),
                pre_existing_conditions: vec![],
                daily_medication: vec![],
                device_ids: vec![],
                notes: String::new(),
                deleted: false,
            })
            .unwrap();
        let dir = AccountDirectory::new(users, patients);
        let ids: Vec<String> = dir.recipients("p1").into_iter().map(|r| r.user_id).collect();
        assert_eq!(ids, ["adm", "nurse", "son"]);
        assert_eq!(dir.patient_name("p1").as_deref(), Some("Ana P."));
        assert_eq!(dir.user_name("nurse").as_deref(), Some("NURSE"));
    }
}
