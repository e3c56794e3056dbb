#![allow(dead_code)]

use std::collections::BTreeMap;

use incognito_core::agents::{OrgAdmin, ProducerAdmin, RotationPolicy, ServerDirectory, UserAgent};
use incognito_core::clearance::ClearanceCenter;
use incognito_core::envelope::{KeyPair, Scheme};
use incognito_core::local::LocalNetwork;
use incognito_core::agents::RequestError;
use incognito_core::messages::Params;
use incognito_core::modifier::Modifier;
use incognito_core::server::{AclEntry, ClearanceRef, Resource, ResourceKind, ResourceServer};
use incognito_core::token::{Grant, ServiceAgreement, Ticket, Token};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use uuid::Uuid;

pub const T0: u64 = 925_725_600; // 1999-05-03 10:00 UTC

pub struct World {
    pub center: ClearanceCenter,
    pub server: ResourceServer,
    pub org: OrgAdmin,
    pub producer: ProducerAdmin,
    pub ticket: Token,
    pub echo: Token,
    pub counter: Token,
    pub doc: Token,
    pub scheme: Scheme,
}

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

impl World {
    pub fn new(scheme: Scheme) -> Self {
        Self::with_grant_modifiers(scheme, Vec::new())
    }

    pub fn with_grant_modifiers(scheme: Scheme, grant_mods: Vec<Modifier>) -> Self {
        let mut r = rng(1);
        let center_id = Token::named(Uuid::from_u128(0xc1), "clearance").unwrap();
        let center = ClearanceCenter::new(center_id, KeyPair::generate(scheme, &mut r), 11);
        let server_id = Token::named(Uuid::from_u128(0x51), "library").unwrap();
        let mut server = ResourceServer::new(
            server_id.clone(),
            KeyPair::generate(scheme, &mut r),
            ClearanceRef {
                id: center.id().clone(),
                key: center.public_key(),
            },
            300,
            12,
        );
        let res = |n: &str| Token::named(Uuid::from_u128(0x51), n).unwrap();
        let (echo, counter, doc) = (res("echo"), res("counter"), res("doc"));
        server.add_resource(echo.clone(), Resource::new(ResourceKind::Echo));
        server.add_resource(counter.clone(), Resource::new(ResourceKind::Counter));
        server.add_resource(doc.clone(), Resource::new(ResourceKind::Document(b"journal".to_vec())));
        center.register_server(server_id, server.public_key());

        let ticket = center.mint_ticket("journals");
        server.load_acl([
            AclEntry::new(ticket.clone(), echo.clone()),
            AclEntry::new(ticket.clone(), counter.clone()),
            AclEntry::new(ticket.clone(), doc.clone()),
        ]);

        let org_id = Token::named(Uuid::from_u128(0xa0), "acme").unwrap();
        let mut org = OrgAdmin::new(org_id.clone(), KeyPair::generate(scheme, &mut r));
        org.add_member("alice", &["purchasing"]);
        org.add_member("bob", &["purchasing"]);
        let mut agreement = ServiceAgreement::new(org_id);
        agreement.grant(
            org.enrollment("purchasing"),
            Grant::with_modifiers(Ticket::new(ticket.clone()), grant_mods),
        );
        let mut producer = ProducerAdmin::new();
        producer.draft(agreement);
        producer.negotiate_agreement(&mut org, &center).unwrap();

        World {
            center,
            server,
            org,
            producer,
            ticket,
            echo,
            counter,
            doc,
            scheme,
        }
    }

    pub fn user(&self, name: &str, seed: u64) -> UserAgent {
        let mut u = UserAgent::new(name, self.scheme, RotationPolicy::OnRefresh, seed);
        u.learn_server(
            self.server.id().clone(),
            ServerDirectory {
                key: self.server.public_key(),
                clearance: self.server.clearance().clone(),
            },
        );
        u.refresh_enrollments(&self.org, T0).unwrap();
        u
    }

    pub fn net(&self, now: u64) -> LocalNetwork<'_> {
        LocalNetwork::new(now).server(&self.server).center(&self.center)
    }

    pub fn request(&self, user: &mut UserAgent, resource: &Token, now: u64) -> Result<Vec<u8>, RequestError> {
        self.request_with(user, resource, &Params::new(), now, true)
    }

    pub fn request_with(
        &self,
        user: &mut UserAgent,
        resource: &Token,
        params: &Params,
        now: u64,
        approve: bool,
    ) -> Result<Vec<u8>, RequestError> {
        let net = self.net(now);
        user.request_service(&net, self.server.id(), resource, params, now, &[], &mut |_| approve)
    }
}

pub fn params(pairs: &[(&str, &str)]) -> Params {
    pairs
        .iter()
        .map(|(k, v)| (k.as_bytes().to_vec(), v.as_bytes().to_vec()))
        .collect::<BTreeMap<_, _>>()
}
