export { EngineSession, openSession, type SessionOptions } from './session';
export {
  AnnotationError,
  LoadError,
  SessionClosed,
  StartupTimeout,
} from './errors';
export type {
  AnnotatedRecord,
  EngineAnnotation,
  InputRecord,
  ServeRequest,
  ServeResponse,
} from './protocol';
