//! Bundled architecture-only model definitions.

use crate::ir::Framework;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ZooEntry {
    pub name: &'static str,
    pub framework: Framework,
    pub file_name: &'static str,
    pub description: &'static str,
    pub text: &'static str,
}

macro_rules! entry {
    ($name:literal, $framework:ident, $file:literal, $description:literal) => {
        ZooEntry {
            name: $name,
            framework: Framework::$framework,
            file_name: $file,
            description: $description,
            text: include_str!(concat!("../fixtures/", $file)),
        }
    };
}

static ENTRIES: &[ZooEntry] = &[
    entry!("vgg16", Caffe, "vgg16.prototxt", "VGG-16 classifier, 3x224x224 input"),
    entry!("alexnet", Caffe, "alexnet.prototxt", "AlexNet with grouped convolutions and LRN"),
    entry!("googlenet", Caffe, "googlenet.prototxt", "GoogLeNet (Inception v1) deploy network"),
    entry!("squeezenet", Caffe, "squeezenet.prototxt", "SqueezeNet v1.1 train/val network with loss and accuracy"),
    entry!("inception_v3", Caffe, "inception_v3.prototxt", "Inception-V3-style network with factorized convolutions"),
    entry!("resnet50", Caffe, "resnet50.prototxt", "ResNet-50-style bottleneck network"),
    entry!("vqa", Keras, "vqa.json", "Visual question answering model, LSTM question encoder"),
    entry!("mnist_cnn", Keras, "mnist_cnn.json", "Small sequential digit classifier"),
];

pub fn entries() -> &'static [ZooEntry] {
    ENTRIES
}

pub fn get(name: &str) -> Option<&'static ZooEntry> {
    ENTRIES.iter().find(|e| e.name == name)
}
