"""Detector-output ingestion, clip slicing, fold planning and synthetic data."""

from dogpain.data.clips import Clip, build_clips, clip_starts, load_video_clips, slice_clips, stack_clips
from dogpain.data.detections import DetectionRecord, expand_bbox, filter_detections
from dogpain.data.io import (
    VideoEntry,
    load_detections,
    load_frames,
    load_keypoints,
    load_manifest,
    save_detections,
    save_frames,
    save_keypoints,
    save_manifest,
)
from dogpain.data.splits import FoldPlan, make_splits
from dogpain.data.synth import SynthConfig, synth_blob_clips, synth_clips, synth_generate, write_synth

__all__ = [
    "Clip", "DetectionRecord", "FoldPlan", "SynthConfig", "VideoEntry", "build_clips",
    "clip_starts", "expand_bbox", "filter_detections", "load_detections", "load_frames",
    "load_keypoints", "load_manifest", "load_video_clips", "make_splits", "save_detections",
    "save_frames", "save_keypoints", "save_manifest", "slice_clips", "stack_clips",
    "synth_blob_clips", "synth_clips", "synth_generate", "write_synth",
]
