use super::{AtStage, FailureKind, SessionConfig, SessionError, Stage};
use crate::control::{client_open, server_open, ControlEndpoint, ControlMessage, Direction, Side, PROTO_VERSION};
use crate::crypto::derive_key;
use crate::data::{allocate_temp, build_data_path, BindingTable, DataReceiver, DataSender};
use crate::overlay::NodeId;
use crate::path::select_relays;
use crate::runtime::SimHandle;
use crate::time::SimTime;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use std::time::Duration;

/// Relays for one session, each list owner-nearest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelayPlan {
    /// Client half of the control channel; the last one is the rendezvous.
    pub ctrl_client: Vec<NodeId>,
    pub ctrl_server: Vec<NodeId>,
    /// Server-to-client data path, owned by the client.
    pub s2c: Vec<NodeId>,
    /// Client-to-server data path, owned by the server.
    pub c2s: Vec<NodeId>,
}

impl RelayPlan {
    /// The directed links a data packet in `dir` crosses, sender first.
    pub fn data_links(&self, dir: Direction, client: NodeId, server: NodeId) -> Vec<(NodeId, NodeId)> {
        let (path, sender, receiver) = match dir {
            Direction::S2c => (&self.s2c, server, client),
            Direction::C2s => (&self.c2s, client, server),
        };
        let mut hops = vec![sender];
        hops.extend(path.iter().rev());
        hops.push(receiver);
        hops.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn all(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.ctrl_client
            .iter()
            .chain(&self.ctrl_server)
            .chain(&self.s2c)
            .chain(&self.c2s)
            .copied()
    }
}

pub const DATA_PATH_LEN: usize = 3;

/// Draws the control relays, then two data paths disjoint from each other
/// and (unless overlap is allowed) from the control relays.
pub fn plan_relays<R: Rng + ?Sized>(
    rng: &mut R,
    pool: &[NodeId],
    cfg: &SessionConfig,
) -> Result<RelayPlan, SessionError> {
    let mut used = BTreeSet::new();
    let ctrl_client = select_relays(rng, pool, cfg.n_client_relays, &used).at(Stage::ControlChannel)?;
    used.extend(&ctrl_client);
    let ctrl_server = select_relays(rng, pool, cfg.n_server_relays, &used).at(Stage::ControlChannel)?;
    used.extend(&ctrl_server);
    if cfg.allow_overlap {
        used.clear();
    }
    let s2c = select_relays(rng, pool, DATA_PATH_LEN, &used).at(Stage::DataPath)?;
    used.extend(&s2c);
    let c2s = select_relays(rng, pool, DATA_PATH_LEN, &used).at(Stage::DataPath)?;
    Ok(RelayPlan {
        ctrl_client,
        ctrl_server,
        s2c,
        c2s,
    })
}

/// What both parties get from introduction, drawn up front from the
/// session seed.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Intro {
    pub board_key: u64,
    pub session_id: u64,
    pub control_secret: [u8; 32],
    pub client_km: [u8; 32],
    pub server_km: [u8; 32],
}

impl Intro {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        Intro {
            board_key: rng.gen(),
            session_id: rng.gen(),
            control_secret: rng.gen(),
            client_km: rng.gen(),
            server_km: rng.gen(),
        }
    }
}

fn session_rng(cfg: &SessionConfig) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(cfg.seed)
}

fn data_secret(client_km: &[u8; 32], server_km: &[u8; 32]) -> [u8; 32] {
    derive_key(&[client_km.as_slice(), server_km].concat(), b"darkhorse data")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionState {
    Bootstrapping,
    Ready,
    Closed,
}

/// One party's half of a session.
#[derive(Debug)]
pub struct Peer {
    pub node: NodeId,
    pub side: Side,
    pub ctrl: ControlEndpoint,
    /// Channel this party receives on (it owns the path).
    pub rx: Option<DataReceiver>,
    /// Channel this party sends on.
    pub tx: Option<DataSender>,
    pub bindings: BindingTable,
    /// Round trip over both data paths, estimated from the path build.
    pub rtt_estimate: Duration,
    pub ready_at: SimTime,
}

impl Peer {
    pub fn close(&self, h: &SimHandle) {
        if let Some(rx) = &self.rx {
            rx.close(h);
        }
        self.ctrl.close(h);
    }
}

#[derive(Debug)]
pub struct Session {
    pub client: Peer,
    pub server: Peer,
    pub plan: RelayPlan,
    pub cfg: SessionConfig,
    pub session_id: u64,
    pub started_at: SimTime,
    /// Until the client has the server's Hello.
    pub control_open_time: Duration,
    /// Until the client is ready: control open, own path bound, server's
    /// binding received.
    pub bootstrap_time: Duration,
    pub server_ready_time: Duration,
    pub state: SessionState,
    pub(crate) next_transfer_id: u32,
}

impl Session {
    pub fn close(&mut self, h: &SimHandle) {
        if self.state == SessionState::Closed {
            return;
        }
        self.client.ctrl.send_msg(
            h,
            &ControlMessage::Teardown {
                session_id: self.session_id,
            },
        );
        self.client.close(h);
        self.server.close(h);
        self.state = SessionState::Closed;
    }
}

fn cell_plain_len(cfg: &SessionConfig) -> usize {
    cfg.packet_size()
}

async fn client_control(
    h: &SimHandle,
    node: NodeId,
    relays: &[NodeId],
    intro: &Intro,
    cfg: &SessionConfig,
) -> Result<(ControlEndpoint, [u8; 32]), SessionError> {
    let circ = client_open(h, node, relays, intro.board_key)
        .await
        .at(Stage::ControlChannel)?;
    let mut ctrl = ControlEndpoint::new(h, circ, Side::Client, &intro.control_secret, cell_plain_len(cfg));
    ctrl.send_msg(
        h,
        &ControlMessage::Hello {
            session_id: intro.session_id,
            e2e_key_material: intro.client_km,
            proto_version: PROTO_VERSION,
        },
    );
    match ctrl.recv_msg(h).await.at(Stage::ControlChannel)? {
        ControlMessage::Hello {
            session_id,
            e2e_key_material,
            proto_version: PROTO_VERSION,
        } if session_id == intro.session_id => Ok((ctrl, e2e_key_material)),
        other => {
            ctrl.close(h);
            Err(protocol(Stage::ControlChannel, &other))
        }
    }
}

async fn server_control(
    h: &SimHandle,
    node: NodeId,
    relays: &[NodeId],
    intro: &Intro,
    cfg: &SessionConfig,
) -> Result<(ControlEndpoint, [u8; 32]), SessionError> {
    let circ = server_open(h, node, relays, intro.board_key)
        .await
        .at(Stage::ControlChannel)?;
    let mut ctrl = ControlEndpoint::new(h, circ, Side::Server, &intro.control_secret, cell_plain_len(cfg));
    match ctrl.recv_msg(h).await.at(Stage::ControlChannel)? {
        ControlMessage::Hello {
            session_id,
            e2e_key_material,
            proto_version: PROTO_VERSION,
        } if session_id == intro.session_id => {
            ctrl.send_msg(
                h,
                &ControlMessage::Hello {
                    session_id,
                    e2e_key_material: intro.server_km,
                    proto_version: PROTO_VERSION,
                },
            );
            Ok((ctrl, e2e_key_material))
        }
        other => {
            ctrl.close(h);
            Err(protocol(Stage::ControlChannel, &other))
        }
    }
}

fn protocol(stage: Stage, m: &ControlMessage) -> SessionError {
    SessionError {
        stage,
        kind: FailureKind::Protocol(format!("unexpected {m:?}")),
    }
}

/// Builds and binds this party's receive path, then waits for the other
/// party's binding.
async fn data_phase(
    h: &SimHandle,
    node: NodeId,
    ctrl: &mut ControlEndpoint,
    path: &[NodeId],
    own: Direction,
    secret: &[u8; 32],
) -> Result<(DataReceiver, DataSender, BindingTable, Duration), SessionError> {
    let mut handle = build_data_path(h, node, path, own).await.at(Stage::DataPath)?;
    let temp = match allocate_temp(h) {
        Ok(t) => t,
        Err(e) => {
            handle.circ.close(h);
            return Err(e).at(Stage::Binding);
        }
    };
    let b = handle.bind(temp);
    ctrl.send_msg(h, &b.message());
    // Building three hops costs 2+4+6 link delays; a round trip over two
    // such paths costs 8.
    let rtt = handle.build_time * 2 / 3;
    let rx = DataReceiver::new(h, handle, secret);
    let mut bindings = BindingTable::default();
    let res = async {
        let m = ctrl.recv_msg(h).await.at(Stage::Binding)?;
        let theirs = bindings.accept(&m).at(Stage::Binding)?;
        if theirs.direction != own.reverse() {
            return Err(protocol(Stage::Binding, &m));
        }
        Ok(theirs)
    }
    .await;
    match res {
        Ok(theirs) => Ok((rx, DataSender::new(h, node, theirs, secret), bindings, rtt)),
        Err(e) => {
            rx.close(h);
            Err(e)
        }
    }
}

async fn dark_side(
    h: SimHandle,
    side: Side,
    node: NodeId,
    plan: RelayPlan,
    intro: Intro,
    cfg: SessionConfig,
) -> Result<(Peer, SimTime), SessionError> {
    let (ctrl_relays, own) = match side {
        Side::Client => (&plan.ctrl_client, Direction::S2c),
        Side::Server => (&plan.ctrl_server, Direction::C2s),
    };
    let (mut ctrl, their_km) = match side {
        Side::Client => client_control(&h, node, ctrl_relays, &intro, &cfg).await?,
        Side::Server => server_control(&h, node, ctrl_relays, &intro, &cfg).await?,
    };
    let open_at = h.now();
    let secret = match side {
        Side::Client => data_secret(&intro.client_km, &their_km),
        Side::Server => data_secret(&their_km, &intro.server_km),
    };
    let path = match own {
        Direction::S2c => &plan.s2c,
        Direction::C2s => &plan.c2s,
    };
    match data_phase(&h, node, &mut ctrl, path, own, &secret).await {
        Ok((rx, tx, bindings, rtt_estimate)) => Ok((
            Peer {
                node,
                side,
                ctrl,
                rx: Some(rx),
                tx: Some(tx),
                bindings,
                rtt_estimate,
                ready_at: h.now(),
            },
            open_at,
        )),
        Err(e) => {
            ctrl.close(&h);
            Err(e)
        }
    }
}

/// Runs the full bootstrap between `client` and `server`, drawing relays
/// from every relay in the world.
pub async fn bootstrap(
    h: &SimHandle,
    client: NodeId,
    server: NodeId,
    cfg: &SessionConfig,
) -> Result<Session, SessionError> {
    let mut rng = session_rng(cfg);
    let intro = Intro::draw(&mut rng);
    let pool = h.with(|w| w.relay_ids());
    let plan = plan_relays(&mut rng, &pool, cfg)?;
    bootstrap_with_intro(h, client, server, plan, intro, cfg).await
}

/// Bootstrap over a fixed relay plan.
pub async fn bootstrap_with_plan(
    h: &SimHandle,
    client: NodeId,
    server: NodeId,
    plan: RelayPlan,
    cfg: &SessionConfig,
) -> Result<Session, SessionError> {
    let intro = Intro::draw(&mut session_rng(cfg));
    bootstrap_with_intro(h, client, server, plan, intro, cfg).await
}

async fn bootstrap_with_intro(
    h: &SimHandle,
    client: NodeId,
    server: NodeId,
    plan: RelayPlan,
    intro: Intro,
    cfg: &SessionConfig,
) -> Result<Session, SessionError> {
    let started_at = h.now();
    let c = h.spawn(dark_side(
        h.clone(),
        Side::Client,
        client,
        plan.clone(),
        intro,
        cfg.clone(),
    ));
    let s = h.spawn(dark_side(
        h.clone(),
        Side::Server,
        server,
        plan.clone(),
        intro,
        cfg.clone(),
    ));
    let ((client, open_at), (server, _)) = futures::future::try_join(c, s).await?;
    Ok(Session {
        control_open_time: open_at.saturating_since(started_at),
        bootstrap_time: client.ready_at.saturating_since(started_at),
        server_ready_time: server.ready_at.saturating_since(started_at),
        client,
        server,
        plan,
        cfg: cfg.clone(),
        session_id: intro.session_id,
        started_at,
        state: SessionState::Ready,
        next_transfer_id: 1,
    })
}

/// A baseline session: only the 6-relay channel, no data paths.
#[derive(Debug)]
pub struct VanillaSession {
    pub client: Peer,
    pub server: Peer,
    pub cfg: SessionConfig,
    /// Until the client has the server's Hello.
    pub open_time: Duration,
    pub(crate) next_transfer_id: u32,
}

async fn vanilla_side(
    h: SimHandle,
    side: Side,
    node: NodeId,
    relays: Vec<NodeId>,
    intro: Intro,
    cfg: SessionConfig,
) -> Result<Peer, SessionError> {
    let (ctrl, _) = match side {
        Side::Client => client_control(&h, node, &relays, &intro, &cfg).await?,
        Side::Server => server_control(&h, node, &relays, &intro, &cfg).await?,
    };
    Ok(Peer {
        node,
        side,
        ctrl,
        rx: None,
        tx: None,
        bindings: BindingTable::default(),
        rtt_estimate: Duration::ZERO,
        ready_at: h.now(),
    })
}

/// Opens the baseline channel with the same relay draw a full bootstrap
/// would use for its control channel.
pub async fn vanilla_open(
    h: &SimHandle,
    client: NodeId,
    server: NodeId,
    cfg: &SessionConfig,
) -> Result<VanillaSession, SessionError> {
    let mut rng = session_rng(cfg);
    let intro = Intro::draw(&mut rng);
    let pool = h.with(|w| w.relay_ids());
    let mut used = BTreeSet::new();
    let cr = select_relays(&mut rng, &pool, cfg.n_client_relays, &used).at(Stage::ControlChannel)?;
    used.extend(&cr);
    let sr = select_relays(&mut rng, &pool, cfg.n_server_relays, &used).at(Stage::ControlChannel)?;
    let started_at = h.now();
    let c = h.spawn(vanilla_side(h.clone(), Side::Client, client, cr, intro, cfg.clone()));
    let s = h.spawn(vanilla_side(h.clone(), Side::Server, server, sr, intro, cfg.clone()));
    let (client, server) = futures::future::try_join(c, s).await?;
    Ok(VanillaSession {
        open_time: client.ready_at.saturating_since(started_at),
        client,
        server,
        cfg: cfg.clone(),
        next_transfer_id: 1,
    })
}
