export {
  DTypeName,
  TensorView,
  TypedPayload,
  VolumeFormatError,
  checkView,
  dtypeOf,
  peekVolumeHeader,
  readVolume,
  view,
  writeVolume,
} from "./calv.js";
export {
  Manifest,
  ManifestCase,
  ManifestError,
  loadManifest,
  parseManifest,
  writeManifest,
} from "./manifest.js";
export {
  AceLossOptions,
  AceLossResult,
  ClassStats,
  Engine,
  EngineError,
  EngineOptions,
  KernelName,
  MetricsOptions,
  MetricsReport,
  Protocol,
  ReportBlock,
  TemperatureOptions,
  TemperatureReport,
} from "./engine.js";
