pub(crate) const SCHEMA_VERSION: i64 = 1;

pub(crate) const SCHEMA: &str = r#"
CREATE TABLE IF NOT EXISTS meta (
    key   TEXT PRIMARY KEY,
    value TEXT NOT NULL
);

CREATE TABLE IF NOT EXISTS nodes (
    id          INTEGER PRIMARY KEY AUTOINCREMENT,
    uuid        TEXT NOT NULL UNIQUE,
    kind        TEXT NOT NULL,
    label       TEXT NOT NULL DEFAULT '',
    description TEXT NOT NULL DEFAULT '',
    ctime       TEXT NOT NULL,
    mtime       TEXT NOT NULL,
    computer    TEXT,
    attributes  TEXT NOT NULL,
    extras      TEXT NOT NULL,
    hash        TEXT
);
CREATE INDEX IF NOT EXISTS nodes_kind ON nodes(kind);
CREATE INDEX IF NOT EXISTS nodes_hash ON nodes(hash);

CREATE TABLE IF NOT EXISTS repo_files (
    node_id INTEGER NOT NULL REFERENCES nodes(id),
    path    TEXT NOT NULL,
    sha256  TEXT NOT NULL,
    size    INTEGER NOT NULL,
    PRIMARY KEY (node_id, path)
);

CREATE TABLE IF NOT EXISTS links (
    id     INTEGER PRIMARY KEY AUTOINCREMENT,
    source INTEGER NOT NULL REFERENCES nodes(id),
    target INTEGER NOT NULL REFERENCES nodes(id),
    type   TEXT NOT NULL,
    label  TEXT NOT NULL
);
CREATE INDEX IF NOT EXISTS links_source ON links(source, type);
CREATE INDEX IF NOT EXISTS links_target ON links(target, type);

CREATE TABLE IF NOT EXISTS tc (
    ancestor   INTEGER NOT NULL,
    descendant INTEGER NOT NULL,
    depth      INTEGER NOT NULL,
    PRIMARY KEY (ancestor, descendant)
) WITHOUT ROWID;
CREATE INDEX IF NOT EXISTS tc_descendant ON tc(descendant, ancestor);

CREATE TABLE IF NOT EXISTS checkpoints (
    node_id    INTEGER PRIMARY KEY REFERENCES nodes(id),
    version    INTEGER NOT NULL,
    data       BLOB NOT NULL,
    updated_at TEXT NOT NULL
);

CREATE TABLE IF NOT EXISTS processes (
    node_id      INTEGER PRIMARY KEY REFERENCES nodes(id),
    uuid         TEXT NOT NULL UNIQUE,
    process_type TEXT NOT NULL,
    state        TEXT NOT NULL,
    exit_code    INTEGER,
    exception    TEXT,
    paused_from  TEXT,
    pause_reason TEXT,
    caller       TEXT,
    updated_at   REAL NOT NULL
);
CREATE INDEX IF NOT EXISTS processes_state ON processes(state);
CREATE INDEX IF NOT EXISTS processes_caller ON processes(caller);

CREATE TABLE IF NOT EXISTS process_report (
    id       INTEGER PRIMARY KEY AUTOINCREMENT,
    node_id  INTEGER NOT NULL,
    at       REAL NOT NULL,
    category TEXT NOT NULL,
    message  TEXT NOT NULL
);
CREATE INDEX IF NOT EXISTS process_report_node ON process_report(node_id);

CREATE TABLE IF NOT EXISTS tasks (
    id             INTEGER PRIMARY KEY AUTOINCREMENT,
    process_uuid   TEXT NOT NULL UNIQUE,
    channel        TEXT NOT NULL,
    status         TEXT NOT NULL,
    owner          TEXT,
    lease          INTEGER NOT NULL DEFAULT 0,
    enqueued_at    REAL NOT NULL,
    available_at   REAL NOT NULL,
    delivery_count INTEGER NOT NULL DEFAULT 0
);
CREATE INDEX IF NOT EXISTS tasks_claim ON tasks(channel, status, available_at);
CREATE INDEX IF NOT EXISTS tasks_owner ON tasks(owner);

CREATE TABLE IF NOT EXISTS assignments (
    id           INTEGER PRIMARY KEY AUTOINCREMENT,
    task_id      INTEGER NOT NULL,
    process_uuid TEXT NOT NULL,
    worker       TEXT NOT NULL,
    lease        INTEGER NOT NULL,
    claimed_at   REAL NOT NULL,
    released_at  REAL,
    outcome      TEXT
);
CREATE INDEX IF NOT EXISTS assignments_open ON assignments(task_id, released_at);

CREATE TABLE IF NOT EXISTS workers (
    id             TEXT PRIMARY KEY,
    pid            INTEGER,
    started_at     REAL NOT NULL,
    last_heartbeat REAL NOT NULL,
    status         TEXT NOT NULL
);

CREATE TABLE IF NOT EXISTS events (
    seq          INTEGER PRIMARY KEY AUTOINCREMENT,
    process_uuid TEXT NOT NULL,
    process_type TEXT NOT NULL,
    kind         TEXT NOT NULL,
    old_state    TEXT,
    new_state    TEXT NOT NULL,
    at           REAL NOT NULL
);
CREATE INDEX IF NOT EXISTS events_process ON events(process_uuid);

CREATE TABLE IF NOT EXISTS rpc (
    id           INTEGER PRIMARY KEY AUTOINCREMENT,
    process_uuid TEXT NOT NULL,
    action       TEXT NOT NULL,
    requested_at REAL NOT NULL,
    status       TEXT NOT NULL,
    response     TEXT
);
CREATE INDEX IF NOT EXISTS rpc_pending ON rpc(status, process_uuid);

CREATE TABLE IF NOT EXISTS step_log (
    id           INTEGER PRIMARY KEY AUTOINCREMENT,
    process_uuid TEXT NOT NULL,
    step         TEXT NOT NULL,
    pc           TEXT NOT NULL,
    ordinal      INTEGER NOT NULL,
    worker       TEXT NOT NULL,
    at           REAL NOT NULL
);
CREATE INDEX IF NOT EXISTS step_log_process ON step_log(process_uuid);
"#;
