/**
 * Wire types for the engine's serve-stdio protocol.
 *
 * Requests and responses are single JSON lines. Annotated records mirror
 * the engine's JSONL record schema field for field; nothing is renamed or
 * restructured on this side.
 */

export interface EngineAnnotation {
  kind: string;
  /** 0-based character offsets, end inclusive. */
  begin: number;
  end: number;
  result: string;
  metadata: Record<string, string>;
  vector?: number[];
}

export interface InputRecord {
  id: string;
  text: string;
}

export interface AnnotatedRecord {
  id: string;
  text: string;
  columns?: Record<string, EngineAnnotation[]>;
  error?: string;
}

export interface ServeRequest {
  op: 'ping' | 'annotate';
  id: number;
  record?: InputRecord;
}

export interface ServeResponse {
  id: number | null;
  result?: unknown;
  error?: string;
}

export function serializeRequest(req: ServeRequest): string {
  return JSON.stringify(req) + '\n';
}

export function parseResponse(line: string): ServeResponse | null {
  try {
    const obj = JSON.parse(line);
    if (typeof obj !== 'object' || obj === null) return null;
    return obj as ServeResponse;
  } catch {
    return null;
  }
}
