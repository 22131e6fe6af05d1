/** Engine process never answered the startup ping in time. */
export class StartupTimeout extends Error {
  constructor(timeoutMs: number) {
    super(`engine did not answer ping within ${timeoutMs} ms`);
    this.name = 'StartupTimeout';
  }
}

/** Engine exited before the session came up, e.g. the pipeline failed to load. */
export class LoadError extends Error {
  readonly exitCode: number | null;

  constructor(exitCode: number | null, stderr: string) {
    const detail = stderr.trim() || 'no stderr output';
    super(`engine exited with code ${exitCode}: ${detail}`);
    this.name = 'LoadError';
    this.exitCode = exitCode;
  }
}

/** The engine answered a request with an error payload. */
export class AnnotationError extends Error {
  constructor(message: string) {
    super(message);
    this.name = 'AnnotationError';
  }
}

/** The session was closed, or the engine died, before the call settled. */
export class SessionClosed extends Error {
  constructor(message = 'session is closed') {
    super(message);
    this.name = 'SessionClosed';
  }
}
