import { spawn, type ChildProcessWithoutNullStreams } from 'node:child_process';
import { createInterface } from 'node:readline';

import { AnnotationError, LoadError, SessionClosed, StartupTimeout } from './errors';
import {
  type AnnotatedRecord,
  type ServeRequest,
  parseResponse,
  serializeRequest,
} from './protocol';

export interface SessionOptions {
  /** Engine executable; falls back to the ANNOFLOW_BIN environment variable. */
  binary?: string;
  /** Saved pipeline directory passed to `serve-stdio --pipeline`. */
  pipelineDir: string;
  /** Startup budget for the first ping. Default 10 s. */
  startupTimeoutMs?: number;
}

interface Pending {
  resolve: (value: unknown) => void;
  reject: (reason: Error) => void;
}

interface ExitInfo {
  code: number | null;
  signal: NodeJS.Signals | null;
}

/**
 * State the stream handlers need. Kept separate from EngineSession on
 * purpose: listeners that live as long as the child may close over this
 * object but never over the session, so a session dropped without close()
 * stays collectable and the finalization registry can reap its subprocess.
 */
interface Shared {
  pending: Map<number, Pending>;
  exitInfo: ExitInfo | null;
  stderr: string;
}

const STDERR_CAP = 8192;
const CLOSE_GRACE_MS = 5000;

// last-resort cleanup so no engine outlives the host process
const liveChildren = new Set<ChildProcessWithoutNullStreams>();
process.on('exit', () => {
  for (const child of liveChildren) child.kill('SIGKILL');
});

const reaper = new FinalizationRegistry<ChildProcessWithoutNullStreams>((child) => {
  if (child.exitCode === null && child.signalCode === null) child.kill('SIGKILL');
  liveChildren.delete(child);
});

function rejectAll(shared: Shared, error: Error): void {
  const waiting = [...shared.pending.values()];
  shared.pending.clear();
  for (const entry of waiting) entry.reject(error);
}

function waitForExit(
  child: ChildProcessWithoutNullStreams,
  shared: Shared,
  timeoutMs: number,
): Promise<boolean> {
  if (shared.exitInfo) return Promise.resolve(true);
  return new Promise((resolve) => {
    const timer = setTimeout(() => {
      child.off('exit', onExit);
      resolve(false);
    }, timeoutMs);
    const onExit = () => {
      clearTimeout(timer);
      resolve(true);
    };
    child.once('exit', onExit);
  });
}

/**
 * One running serve-stdio subprocess plus its pending-request table.
 *
 * A session is single-owner: calls may be issued without awaiting each
 * other (responses correlate by id), but sharing a session across threads
 * of control needs an external lock or one session per owner.
 */
export class EngineSession {
  private readonly child: ChildProcessWithoutNullStreams;
  private readonly shared: Shared;
  private nextId = 0;
  private closed = false;
  private closing: Promise<void> | null = null;

  private constructor(binary: string, pipelineDir: string) {
    this.shared = { pending: new Map(), exitInfo: null, stderr: '' };
    const shared = this.shared;
    this.child = spawn(binary, ['serve-stdio', '--pipeline', pipelineDir], {
      stdio: ['pipe', 'pipe', 'pipe'],
    });
    // EPIPE from writes after engine death surfaces as SessionClosed instead
    this.child.stdin.on('error', () => {});
    this.child.stderr.setEncoding('utf8');
    this.child.stderr.on('data', (chunk: string) => {
      shared.stderr = (shared.stderr + chunk).slice(-STDERR_CAP);
    });
    const lines = createInterface({ input: this.child.stdout });
    lines.on('line', (line) => {
      const resp = parseResponse(line);
      if (resp === null || typeof resp.id !== 'number') return;
      const entry = shared.pending.get(resp.id);
      if (!entry) return;
      shared.pending.delete(resp.id); // each id settles exactly once
      if (resp.error !== undefined) entry.reject(new AnnotationError(resp.error));
      else entry.resolve(resp.result);
    });
    this.child.on('exit', (code, signal) => {
      shared.exitInfo = { code, signal };
      rejectAll(shared, new SessionClosed(`engine exited with code ${code}`));
    });
    liveChildren.add(this.child);
    reaper.register(this, this.child, this);
  }

  static async open(options: SessionOptions): Promise<EngineSession> {
    const binary = options.binary ?? process.env.ANNOFLOW_BIN;
    if (!binary) {
      throw new Error('no engine binary: pass options.binary or set ANNOFLOW_BIN');
    }
    const session = new EngineSession(binary, options.pipelineDir);
    await session.start(options.startupTimeoutMs ?? 10_000);
    return session;
  }

  /** Process id of the engine subprocess, for diagnostics and tests. */
  get pid(): number | undefined {
    return this.child.pid;
  }

  get isClosed(): boolean {
    return this.closed;
  }

  async ping(): Promise<void> {
    const result = await this.call({ op: 'ping', id: this.issueId() });
    if (result !== 'pong') {
      throw new AnnotationError(`unexpected ping reply: ${JSON.stringify(result)}`);
    }
  }

  /**
   * Annotate one document and return the engine's record as parsed JSON,
   * field for field. The optional id names the record in the output.
   */
  async annotate(text: string, id?: string): Promise<AnnotatedRecord> {
    const reqId = this.issueId();
    const record = { id: id ?? `rec-${reqId}`, text };
    const result = await this.call({ op: 'annotate', id: reqId, record });
    return result as AnnotatedRecord;
  }

  /**
   * Terminate the subprocess: reject anything pending, send EOF, and
   * escalate to SIGKILL if the engine has not exited within 5 s.
   * Idempotent; repeat calls await the same shutdown.
   */
  close(): Promise<void> {
    if (!this.closing) this.closing = this.shutdown();
    return this.closing;
  }

  private issueId(): number {
    return this.nextId++;
  }

  private call(req: ServeRequest): Promise<unknown> {
    if (this.closed) return Promise.reject(new SessionClosed());
    if (this.shared.exitInfo) {
      return Promise.reject(
        new SessionClosed(`engine exited with code ${this.shared.exitInfo.code}`),
      );
    }
    return new Promise((resolve, reject) => {
      this.shared.pending.set(req.id, { resolve, reject });
      this.child.stdin.write(serializeRequest(req));
    });
  }

  private async start(timeoutMs: number): Promise<void> {
    // No closure below may reference `this`: anything listening on the
    // child shares this scope's context, and a context that holds the
    // session would keep it reachable for the child's whole lifetime,
    // disabling the finalization registry.
    const child = this.child;
    const shared = this.shared;
    let timer: NodeJS.Timeout | undefined;
    let spawnReject: ((reason: Error) => void) | undefined;
    let exitListener: ((code: number | null) => void) | undefined;
    const timeout = new Promise<never>((_, reject) => {
      timer = setTimeout(() => reject(new StartupTimeout(timeoutMs)), timeoutMs);
    });
    const spawnFailed = new Promise<never>((_, reject) => {
      spawnReject = reject;
      child.once('error', reject); // e.g. ENOENT: binary missing
    });
    const died = new Promise<never>((_, reject) => {
      exitListener = (code) => reject(new LoadError(code, shared.stderr));
      child.once('exit', exitListener);
    });
    try {
      await Promise.race([this.ping(), spawnFailed, died, timeout]);
    } catch (err) {
      await this.destroy();
      if (err instanceof SessionClosed) {
        // the exit handler swept the ping before `died` settled
        throw new LoadError(shared.exitInfo?.code ?? null, shared.stderr);
      }
      throw err;
    } finally {
      clearTimeout(timer);
      if (spawnReject) child.off('error', spawnReject);
      if (exitListener) child.off('exit', exitListener);
    }
  }

  private async shutdown(): Promise<void> {
    this.closed = true;
    rejectAll(this.shared, new SessionClosed('session closed with request pending'));
    reaper.unregister(this);
    // pid is undefined when spawn itself failed: nothing to wait for
    if (!this.shared.exitInfo && this.child.pid !== undefined) {
      this.child.stdin.end(); // graceful: EOF ends the serve loop
      const exited = await waitForExit(this.child, this.shared, CLOSE_GRACE_MS);
      if (!exited) {
        this.child.kill('SIGKILL');
        await waitForExit(this.child, this.shared, CLOSE_GRACE_MS);
      }
    }
    liveChildren.delete(this.child);
  }

  private async destroy(): Promise<void> {
    this.closed = true;
    rejectAll(this.shared, new SessionClosed());
    reaper.unregister(this);
    if (!this.shared.exitInfo && this.child.pid !== undefined) {
      this.child.kill('SIGKILL');
      await waitForExit(this.child, this.shared, CLOSE_GRACE_MS);
    }
    liveChildren.delete(this.child);
  }
}

/** Spawn the engine and wait for it to answer ping. */
export function openSession(options: SessionOptions): Promise<EngineSession> {
  return EngineSession.open(options);
}
