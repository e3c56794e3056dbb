//! Type tags for the canonical codec. Each tagged type owns exactly one byte.

pub const TOKEN: u8 = 0x01;
pub const ENROLLMENT: u8 = 0x02;
pub const TICKET: u8 = 0x03;
pub const MODIFIER: u8 = 0x04;
pub const IMPLICATION_MAP: u8 = 0x05;
pub const SERVICE_AGREEMENT: u8 = 0x06;
pub const GRANT: u8 = 0x07;
pub const ACL_ENTRY: u8 = 0x08;
pub const ACL: u8 = 0x09;

pub const PUBLIC_KEY: u8 = 0x10;
pub const KEY_PAIR: u8 = 0x11;
pub const SIGNED_BLOB: u8 = 0x12;
pub const SEALED_BLOB: u8 = 0x13;
pub const EPHEMERAL_PUBLIC_KEY: u8 = 0x14;
pub const EPHEMERAL_KEY_PAIR: u8 = 0x15;

pub const TAU: u8 = 0x20;
pub const CERTIFICATE_BODY: u8 = 0x21;
pub const ENROLLMENT_CERTIFICATE: u8 = 0x22;
pub const ORG_CLAIM: u8 = 0x23;
pub const CLEARANCE_INNER: u8 = 0x24;
pub const CLEARANCE_BLOB: u8 = 0x25;
pub const REQUEST_BODY: u8 = 0x26;
pub const REQUEST_ENVELOPE: u8 = 0x27;
pub const CLEARANCE_QUERY: u8 = 0x28;
pub const CLEARANCE_REQUEST: u8 = 0x29;
pub const CLEARANCE_VERDICT: u8 = 0x2a;
pub const CLEARANCE_RESPONSE: u8 = 0x2b;
pub const FAILURE: u8 = 0x2c;
pub const SERVER_REPLY: u8 = 0x2d;
pub const CONFIRM_REQUEST: u8 = 0x2e;
pub const CONFIRM_DECISION: u8 = 0x2f;
pub const CONFIRM_REPLY: u8 = 0x30;
pub const DEBIT_COMMIT_BODY: u8 = 0x31;
pub const DEBIT_COMMIT: u8 = 0x32;
pub const DEBIT_RESULT_BODY: u8 = 0x33;
pub const DEBIT_RESULT: u8 = 0x34;
pub const ANSWER_BODY: u8 = 0x35;
pub const ADMIN_MESSAGE: u8 = 0x36;
pub const ISSUED_CERTIFICATE: u8 = 0x37;

pub const CLEARANCE_SNAPSHOT: u8 = 0x40;
pub const KEY_FILE: u8 = 0x41;
pub const PUBLIC_IDENTITY: u8 = 0x42;
pub const TRANSCRIPT: u8 = 0x43;
pub const TRANSCRIPT_ENTRY: u8 = 0x44;
pub const USER_KEYRING: u8 = 0x45;
